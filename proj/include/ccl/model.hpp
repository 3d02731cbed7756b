#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ccl/matrix.hpp"
#include "ccl/rng.hpp"
#include "ccl/tape.hpp"

namespace ccl {

struct ModelConfig {
    int input_dim = 0;
    std::vector<int> hidden_dims{64, 64};
    int embed_dim = 16;
    int num_classes = 0;
    double init_scale = 1.0;
};

struct LinearLayer {
    Matrix weight;  // [out x in]
    Matrix bias;    // [1 x out]
};

// Shared encoder, standard and balanced classifier heads, projection head,
// plus SGD momentum buffers (aligned with parameters() order).
struct ModelState {
    ModelConfig config;
    std::vector<LinearLayer> encoder;
    LinearLayer head_standard;
    LinearLayer head_balanced;
    LinearLayer projection;
    std::vector<Matrix> momentum;

    std::size_t param_count() const;
};

struct ParamRef {
    std::string name;
    Matrix* tensor;
};
std::vector<ParamRef> parameters(ModelState& state);

ModelState init_model(const ModelConfig& config, RandomStream& rng);

// Model parameters lifted onto a tape; all forwards against the same
// ModelVars accumulate into the same parameter gradients.
struct ModelVars {
    std::vector<ad::Var> params;  // parameters() order
    std::vector<std::pair<ad::Var, ad::Var>> encoder;
    std::pair<ad::Var, ad::Var> head_standard;
    std::pair<ad::Var, ad::Var> head_balanced;
    std::pair<ad::Var, ad::Var> projection;
};
ModelVars lift(ad::Tape& tape, const ModelState& state, bool requires_grad);

struct ForwardVars {
    ad::Var features;    // backbone output
    ad::Var logits_s;    // standard head
    ad::Var logits_b;    // balanced head
    ad::Var embeddings;  // unit-norm projection output
};
ForwardVars forward(ad::Tape& tape, const ModelVars& vars, const Matrix& batch);

struct ForwardOutput {
    Matrix features;
    Matrix logits_s;
    Matrix logits_b;
    Matrix embeddings;
};
// Plain evaluation; checks activations are finite and embedding rows unit-norm.
ForwardOutput forward_values(const ModelState& state, const Matrix& batch);

// Classical momentum: buf <- momentum*buf + grad + weight_decay*param;
// param <- param - lr*buf.
void sgd_step(ModelState& state, const std::vector<Matrix>& grads, double lr, double momentum,
              double weight_decay);

// FixMatch-style 7/16-cosine schedule: base_lr * cos(7*pi*step / (16*total)).
double cosine_lr(double base_lr, long step, long total_steps);

void save_checkpoint(const ModelState& state, long step, const std::string& path);
std::pair<ModelState, long> load_checkpoint(const std::string& path);

}  // namespace ccl
