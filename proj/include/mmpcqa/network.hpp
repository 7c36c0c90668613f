#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpcqa/autodiff.hpp"
#include "mmpcqa/clouds.hpp"
#include "mmpcqa/params.hpp"
#include "mmpcqa/render.hpp"

namespace mmpcqa {

// token: attention runs over per-sub-model / per-projection tokens.
// pooled: each modality contributes only its pooled vector (1-token sequence).
enum class FusionMode { token, pooled };
enum class NormPlacement { post, pre };
// cross: queries from the attended modality, keys/values from the guiding one.
// guide_only: queries, keys and values all from the guiding modality.
enum class AttentionWiring { cross, guide_only };
// Ablation variants: P, I, P+I (concatenation), P+I+SCMA (full model).
enum class ModelVariant { point_only, image_only, concat, full };

struct ModelConfig {
  std::size_t n_s = 2048;  // points per sub-model
  std::size_t n_p = 6;     // sub-models per cloud
  std::size_t n_i = 4;     // projections per cloud
  std::vector<std::size_t> point_hidden{64, 128};
  std::size_t c_p = 256;
  std::vector<std::size_t> image_channels{16, 32, 64, 128};
  std::size_t patch = 224;
  std::size_t c_fused = 256;  // C'
  std::size_t heads = 8;
  std::size_t ffn = 2048;
  std::size_t head_hidden = 512;
  FusionMode mode = FusionMode::token;
  NormPlacement norm = NormPlacement::post;
  AttentionWiring wiring = AttentionWiring::cross;
  ModelVariant variant = ModelVariant::full;

  std::size_t c_i() const;
  std::size_t head_dim() const { return c_fused / heads; }
  std::size_t quality_dim() const;  // regression head input width
  bool uses_points() const { return variant != ModelVariant::image_only; }
  bool uses_images() const { return variant != ModelVariant::point_only; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

std::string to_string(ModelVariant v);
ModelVariant parse_variant(const std::string& s);

std::vector<ParamSpec> model_param_specs(const ModelConfig& config);

template <typename T>
Tensor<T> submodel_tensor(const SubModelPoints& points);
template <typename T>
Tensor<T> patch_tensor(const RgbImage& patch);  // [3, h, w]

template <typename T>
struct ModelInputs {
  std::vector<Tensor<T>> submodels;  // each [n_s, 3]
  std::vector<Tensor<T>> patches;    // each [3, patch, patch]
};

// Per-item embeddings (one row each) and their mean.
struct ModalityEmbedding {
  Var rows;
  Var pooled;
};

struct FusionResult {
  Var point_hat;  // F^_P, 1 x C'
  Var image_hat;  // F^_I, 1 x C'
  Var attended;   // Psi, 1 x 2C'
  Var quality;    // F^_P (+) F^_I (+) Psi, 1 x 4C'
  std::vector<Var> attention_weights;  // one softmax matrix per direction and head
};

struct ForwardTrace {
  ModalityEmbedding points;
  ModalityEmbedding images;
  FusionResult fusion;
  Var quality;  // head input (depends on the variant)
  Var score;    // 1 x 1
};

template <typename T>
class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  Var encode_submodel(Graph<T>& g, const ParameterStore<T>& p, Var points) const;
  ModalityEmbedding encode_pointcloud(Graph<T>& g, const ParameterStore<T>& p, const std::vector<Var>& submodels) const;
  Var encode_image(Graph<T>& g, const ParameterStore<T>& p, Var patch, std::vector<Var>* stages = nullptr) const;
  ModalityEmbedding encode_projections(Graph<T>& g, const ParameterStore<T>& p, const std::vector<Var>& patches) const;
  FusionResult fuse_scma(Graph<T>& g, const ParameterStore<T>& p, const ModalityEmbedding& points,
                         const ModalityEmbedding& images) const;
  Var regress_quality(Graph<T>& g, const ParameterStore<T>& p, Var quality) const;

  ForwardTrace forward(Graph<T>& g, const ParameterStore<T>& p, const ModelInputs<T>& inputs) const;
  // Inputs already on the graph, e.g. as variables for gradient checks.
  ForwardTrace forward(Graph<T>& g, const ParameterStore<T>& p, const std::vector<Var>& submodels,
                       const std::vector<Var>& patches) const;
  // Inference on a fresh graph.
  double predict(const ParameterStore<T>& p, const ModelInputs<T>& inputs) const;

 private:
  Var attention(Graph<T>& g, const ParameterStore<T>& p, const std::string& prefix, Var queries, Var context,
                std::vector<Var>* weights) const;
  Var transformer_block(Graph<T>& g, const ParameterStore<T>& p, const std::string& prefix, Var queries,
                        Var context, std::vector<Var>* weights) const;

  ModelConfig config_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace mmpcqa
