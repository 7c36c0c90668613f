#include "mmpcqa/network.hpp"

#include <cmath>
#include <numeric>

#include "mmpcqa/error.hpp"

namespace mmpcqa {

std::size_t ModelConfig::c_i() const {
  return std::accumulate(image_channels.begin(), image_channels.end(), std::size_t{0});
}

std::size_t ModelConfig::quality_dim() const {
  switch (variant) {
    case ModelVariant::point_only:
    case ModelVariant::image_only: return c_fused;
    case ModelVariant::concat: return 2 * c_fused;
    case ModelVariant::full: return 4 * c_fused;
  }
  return 0;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ValidationError(std::string("model config: ") + what + " must be positive");
  };
  positive(n_s, "n_s");
  positive(n_p, "n_p");
  positive(n_i, "n_i");
  positive(c_p, "c_p");
  positive(patch, "patch");
  positive(c_fused, "c_fused");
  positive(heads, "heads");
  positive(ffn, "ffn");
  positive(head_hidden, "head_hidden");
  if (image_channels.empty()) throw ValidationError("model config: image_channels is empty");
  for (auto c : image_channels) positive(c, "image channel width");
  for (auto c : point_hidden) positive(c, "point hidden width");
  if (c_fused % heads != 0) {
    throw ValidationError("model config: c_fused=" + std::to_string(c_fused) + " not divisible by heads=" +
                          std::to_string(heads));
  }
}

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::point_only: return "P";
    case ModelVariant::image_only: return "I";
    case ModelVariant::concat: return "P+I";
    case ModelVariant::full: return "P+I+SCMA";
  }
  return "?";
}

ModelVariant parse_variant(const std::string& s) {
  if (s == "P" || s == "point_only") return ModelVariant::point_only;
  if (s == "I" || s == "image_only") return ModelVariant::image_only;
  if (s == "P+I" || s == "concat") return ModelVariant::concat;
  if (s == "P+I+SCMA" || s == "full") return ModelVariant::full;
  throw ValidationError("unknown model variant '" + s + "'");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"n_s", c.n_s},
      {"n_p", c.n_p},
      {"n_i", c.n_i},
      {"point_hidden", c.point_hidden},
      {"c_p", c.c_p},
      {"image_channels", c.image_channels},
      {"patch", c.patch},
      {"c_fused", c.c_fused},
      {"heads", c.heads},
      {"ffn", c.ffn},
      {"head_hidden", c.head_hidden},
      {"mode", c.mode == FusionMode::token ? "token" : "pooled"},
      {"norm", c.norm == NormPlacement::post ? "post" : "pre"},
      {"wiring", c.wiring == AttentionWiring::cross ? "cross" : "guide_only"},
      {"variant", to_string(c.variant)},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("n_s", c.n_s);
  opt("n_p", c.n_p);
  opt("n_i", c.n_i);
  opt("point_hidden", c.point_hidden);
  opt("c_p", c.c_p);
  opt("image_channels", c.image_channels);
  opt("patch", c.patch);
  opt("c_fused", c.c_fused);
  opt("heads", c.heads);
  opt("ffn", c.ffn);
  opt("head_hidden", c.head_hidden);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m != "token" && m != "pooled") throw ValidationError("model config: unknown mode '" + m + "'");
    c.mode = m == "token" ? FusionMode::token : FusionMode::pooled;
  }
  if (j.contains("norm")) {
    const auto m = j.at("norm").get<std::string>();
    if (m != "post" && m != "pre") throw ValidationError("model config: unknown norm '" + m + "'");
    c.norm = m == "post" ? NormPlacement::post : NormPlacement::pre;
  }
  if (j.contains("wiring")) {
    const auto m = j.at("wiring").get<std::string>();
    if (m != "cross" && m != "guide_only") throw ValidationError("model config: unknown wiring '" + m + "'");
    c.wiring = m == "cross" ? AttentionWiring::cross : AttentionWiring::guide_only;
  }
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> specs;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, bool bias = true) {
    specs.push_back({name + ".w", {in, out}, in, false});
    if (bias) specs.push_back({name + ".b", {1, out}, in, true});
  };

  if (c.uses_points()) {
    std::size_t in = 3;
    std::size_t layer = 0;
    for (std::size_t width : c.point_hidden) {
      linear("point.mlp" + std::to_string(layer++), in, width);
      in = width;
    }
    linear("point.mlp" + std::to_string(layer), in, c.c_p);
    linear("point.out", c.c_p, c.c_p);
    linear("fuse.proj_p", c.c_p, c.c_fused, false);
  }
  if (c.uses_images()) {
    std::size_t in = 3;
    for (std::size_t k = 0; k < c.image_channels.size(); ++k) {
      const std::size_t out = c.image_channels[k];
      const std::string name = "image.conv" + std::to_string(k);
      specs.push_back({name + ".w", {out, in, 3, 3}, in * 9, false});
      specs.push_back({name + ".b", {out}, in * 9, true});
      in = out;
    }
    linear("fuse.proj_i", c.c_i(), c.c_fused, false);
  }
  if (c.variant == ModelVariant::full) {
    const std::size_t d = c.head_dim();
    for (const char* block : {"fuse.pi", "fuse.ip"}) {
      const std::string b = block;
      for (std::size_t h = 0; h < c.heads; ++h) {
        const std::string hs = std::to_string(h);
        specs.push_back({b + ".wq" + hs, {c.c_fused, d}, c.c_fused, false});
        specs.push_back({b + ".wk" + hs, {c.c_fused, d}, c.c_fused, false});
        specs.push_back({b + ".wv" + hs, {c.c_fused, d}, c.c_fused, false});
      }
      linear(b + ".wo", c.c_fused, c.c_fused, false);
      linear(b + ".ffn0", c.c_fused, c.ffn);
      linear(b + ".ffn1", c.ffn, c.c_fused);
    }
  }
  linear("head.fc0", c.quality_dim(), c.head_hidden);
  linear("head.fc1", c.head_hidden, 1);
  return specs;
}

template <typename T>
Tensor<T> submodel_tensor(const SubModelPoints& points) {
  if (points.size() % 3 != 0) throw ShapeError("sub-model coordinates are not a multiple of 3");
  Tensor<T> t({points.size() / 3, 3});
  for (std::size_t i = 0; i < points.size(); ++i) t.data[i] = static_cast<T>(points[i]);
  return t;
}

template <typename T>
Tensor<T> patch_tensor(const RgbImage& patch) {
  const auto h = static_cast<std::size_t>(patch.height);
  const auto w = static_cast<std::size_t>(patch.width);
  Tensor<T> t({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.data[(c * h + y) * w + x] = static_cast<T>(patch.data[(y * w + x) * 3 + c]);
  return t;
}

template Tensor<float> submodel_tensor<float>(const SubModelPoints&);
template Tensor<double> submodel_tensor<double>(const SubModelPoints&);
template Tensor<float> patch_tensor<float>(const RgbImage&);
template Tensor<double> patch_tensor<double>(const RgbImage&);

template <typename T>
Network<T>::Network(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
}

template <typename T>
Var Network<T>::encode_submodel(Graph<T>& g, const ParameterStore<T>& p, Var points) const {
  const auto& x = g.value(points);
  if (x.rank() != 2 || x.cols() != 3 || x.rows() != config_.n_s) {
    throw ShapeError("encode_submodel: expected [" + std::to_string(config_.n_s) + ",3] points, got " +
                     shape_string(x.shape));
  }
  Var h = points;
  const std::size_t layers = config_.point_hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string name = "point.mlp" + std::to_string(l);
    h = g.linear(h, g.param(name + ".w", p.value(name + ".w")), g.param(name + ".b", p.value(name + ".b")));
    if (l + 1 < layers) h = g.relu(h);
  }
  h = g.max_pool_rows(h);
  return g.linear(h, g.param("point.out.w", p.value("point.out.w")), g.param("point.out.b", p.value("point.out.b")));
}

template <typename T>
ModalityEmbedding Network<T>::encode_pointcloud(Graph<T>& g, const ParameterStore<T>& p,
                                                const std::vector<Var>& submodels) const {
  if (submodels.empty()) throw ValidationError("encode_pointcloud: no sub-models");
  std::vector<Var> rows;
  rows.reserve(submodels.size());
  for (Var s : submodels) rows.push_back(encode_submodel(g, p, s));
  Var stacked = g.concat(rows, 0);
  return {stacked, g.mean_pool_rows(stacked)};
}

template <typename T>
Var Network<T>::encode_image(Graph<T>& g, const ParameterStore<T>& p, Var patch, std::vector<Var>* stages) const {
  const auto& x = g.value(patch);
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) != config_.patch || x.dim(2) != config_.patch) {
    throw ShapeError("encode_image: expected [3," + std::to_string(config_.patch) + "," +
                     std::to_string(config_.patch) + "] patch, got " + shape_string(x.shape));
  }
  std::vector<Var> pooled;
  Var h = patch;
  for (std::size_t k = 0; k < config_.image_channels.size(); ++k) {
    const std::string name = "image.conv" + std::to_string(k);
    h = g.relu(g.conv2d(h, g.param(name + ".w", p.value(name + ".w")), g.param(name + ".b", p.value(name + ".b")), 2));
    if (stages) stages->push_back(h);
    pooled.push_back(g.global_average_pool_2d(h));
  }
  return g.concat(pooled, 1);
}

template <typename T>
ModalityEmbedding Network<T>::encode_projections(Graph<T>& g, const ParameterStore<T>& p,
                                                 const std::vector<Var>& patches) const {
  if (patches.empty()) throw ValidationError("encode_projections: no projections");
  std::vector<Var> rows;
  rows.reserve(patches.size());
  for (Var v : patches) rows.push_back(encode_image(g, p, v));
  Var stacked = g.concat(rows, 0);
  return {stacked, g.mean_pool_rows(stacked)};
}

template <typename T>
Var Network<T>::attention(Graph<T>& g, const ParameterStore<T>& p, const std::string& prefix, Var queries,
                          Var context, std::vector<Var>* weights) const {
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(config_.head_dim()));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < config_.heads; ++h) {
    const std::string hs = std::to_string(h);
    Var q = g.matmul(queries, g.param(prefix + ".wq" + hs, p.value(prefix + ".wq" + hs)));
    Var k = g.matmul(context, g.param(prefix + ".wk" + hs, p.value(prefix + ".wk" + hs)));
    Var v = g.matmul(context, g.param(prefix + ".wv" + hs, p.value(prefix + ".wv" + hs)));
    Var a = g.softmax(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d));
    if (weights) weights->push_back(a);
    heads.push_back(g.matmul(a, v));
  }
  return g.matmul(g.concat(heads, 1), g.param(prefix + ".wo.w", p.value(prefix + ".wo.w")));
}

template <typename T>
Var Network<T>::transformer_block(Graph<T>& g, const ParameterStore<T>& p, const std::string& prefix, Var queries,
                                  Var context, std::vector<Var>* weights) const {
  auto ffn = [&](Var x) {
    Var h = g.relu(g.linear(x, g.param(prefix + ".ffn0.w", p.value(prefix + ".ffn0.w")),
                            g.param(prefix + ".ffn0.b", p.value(prefix + ".ffn0.b"))));
    return g.linear(h, g.param(prefix + ".ffn1.w", p.value(prefix + ".ffn1.w")),
                    g.param(prefix + ".ffn1.b", p.value(prefix + ".ffn1.b")));
  };
  if (config_.norm == NormPlacement::post) {
    Var x = g.layer_norm(g.add(queries, attention(g, p, prefix, queries, context, weights)));
    return g.layer_norm(g.add(x, ffn(x)));
  }
  Var x = g.add(queries, attention(g, p, prefix, g.layer_norm(queries), g.layer_norm(context), weights));
  return g.add(x, ffn(g.layer_norm(x)));
}

template <typename T>
FusionResult Network<T>::fuse_scma(Graph<T>& g, const ParameterStore<T>& p, const ModalityEmbedding& points,
                                   const ModalityEmbedding& images) const {
  if (g.value(points.pooled).cols() != config_.c_p || g.value(images.pooled).cols() != config_.c_i()) {
    throw ShapeError("fuse_scma: embeddings " + shape_string(g.value(points.pooled).shape) + " / " +
                     shape_string(g.value(images.pooled).shape) + " do not match the fusion config (C_P=" +
                     std::to_string(config_.c_p) + ", C_I=" + std::to_string(config_.c_i()) + ")");
  }
  Var wp = g.param("fuse.proj_p.w", p.value("fuse.proj_p.w"));
  Var wi = g.param("fuse.proj_i.w", p.value("fuse.proj_i.w"));

  FusionResult r;
  r.point_hat = g.matmul(points.pooled, wp);
  r.image_hat = g.matmul(images.pooled, wi);

  Var point_tokens = r.point_hat;
  Var image_tokens = r.image_hat;
  if (config_.mode == FusionMode::token) {
    point_tokens = g.matmul(points.rows, wp);
    image_tokens = g.matmul(images.rows, wi);
  }

  // Each modality's tokens attend to the other modality (the guide).
  Var point_side, image_side;
  if (config_.wiring == AttentionWiring::cross) {
    point_side = transformer_block(g, p, "fuse.pi", point_tokens, image_tokens, &r.attention_weights);
    image_side = transformer_block(g, p, "fuse.ip", image_tokens, point_tokens, &r.attention_weights);
  } else {
    point_side = transformer_block(g, p, "fuse.pi", image_tokens, image_tokens, &r.attention_weights);
    image_side = transformer_block(g, p, "fuse.ip", point_tokens, point_tokens, &r.attention_weights);
  }
  const Var psi[] = {g.mean_pool_rows(point_side), g.mean_pool_rows(image_side)};
  r.attended = g.concat(psi, 1);
  const Var parts[] = {r.point_hat, r.image_hat, r.attended};
  r.quality = g.concat(parts, 1);
  return r;
}

template <typename T>
Var Network<T>::regress_quality(Graph<T>& g, const ParameterStore<T>& p, Var quality) const {
  const auto& q = g.value(quality);
  if (q.rank() != 2 || q.rows() != 1 || q.cols() != config_.quality_dim()) {
    throw ShapeError("regress_quality: expected [1," + std::to_string(config_.quality_dim()) + "], got " +
                     shape_string(q.shape));
  }
  Var h = g.relu(g.linear(quality, g.param("head.fc0.w", p.value("head.fc0.w")),
                          g.param("head.fc0.b", p.value("head.fc0.b"))));
  return g.linear(h, g.param("head.fc1.w", p.value("head.fc1.w")), g.param("head.fc1.b", p.value("head.fc1.b")));
}

template <typename T>
ForwardTrace Network<T>::forward(Graph<T>& g, const ParameterStore<T>& p, const ModelInputs<T>& inputs) const {
  std::vector<Var> subs, patches;
  if (config_.uses_points()) {
    for (const auto& s : inputs.submodels) subs.push_back(g.constant(s));
  }
  if (config_.uses_images()) {
    for (const auto& s : inputs.patches) patches.push_back(g.constant(s));
  }
  return forward(g, p, subs, patches);
}

template <typename T>
ForwardTrace Network<T>::forward(Graph<T>& g, const ParameterStore<T>& p, const std::vector<Var>& submodels,
                                 const std::vector<Var>& patches) const {
  ForwardTrace t;
  if (config_.uses_points()) t.points = encode_pointcloud(g, p, submodels);
  if (config_.uses_images()) t.images = encode_projections(g, p, patches);

  switch (config_.variant) {
    case ModelVariant::point_only:
      t.fusion.point_hat = g.matmul(t.points.pooled, g.param("fuse.proj_p.w", p.value("fuse.proj_p.w")));
      t.quality = t.fusion.point_hat;
      break;
    case ModelVariant::image_only:
      t.fusion.image_hat = g.matmul(t.images.pooled, g.param("fuse.proj_i.w", p.value("fuse.proj_i.w")));
      t.quality = t.fusion.image_hat;
      break;
    case ModelVariant::concat: {
      t.fusion.point_hat = g.matmul(t.points.pooled, g.param("fuse.proj_p.w", p.value("fuse.proj_p.w")));
      t.fusion.image_hat = g.matmul(t.images.pooled, g.param("fuse.proj_i.w", p.value("fuse.proj_i.w")));
      const Var parts[] = {t.fusion.point_hat, t.fusion.image_hat};
      t.quality = g.concat(parts, 1);
      break;
    }
    case ModelVariant::full:
      t.fusion = fuse_scma(g, p, t.points, t.images);
      t.quality = t.fusion.quality;
      break;
  }
  t.score = regress_quality(g, p, t.quality);
  return t;
}

template <typename T>
double Network<T>::predict(const ParameterStore<T>& p, const ModelInputs<T>& inputs) const {
  Graph<T> g;
  const auto t = forward(g, p, inputs);
  return static_cast<double>(g.value(t.score).data[0]);
}

template class Network<float>;
template class Network<double>;

}  // namespace mmpcqa
