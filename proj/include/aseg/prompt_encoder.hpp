#pragma once

#include <cstdint>
#include <vector>

#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"

namespace aseg::prompt {

struct ClassPrompt {
    int class_id = 0;
    Tensor one_hot;  // [K], exactly one entry == 1

    static ClassPrompt make(int class_id, int num_classes);
};

struct DiffusionConfig {
    int total_steps = 10;        // T; training samples t uniform in [0, T-1]
    bool variance_mode = false;  // false: std = sigma_t; true: variance = sigma_t
    bool enabled = true;

    void validate() const;
};

struct PromptEmbeddings {
    Tensor sparse;  // [B, 2, C]
    Tensor dense;   // [B, C, He, We]
};

enum class Mode { kTrain, kInfer };

// sigma_t = 1/(t+1)
double noise_schedule(int t);

// Conditional forward diffusion plus a one-encoder/two-decoder reverse pass
// emitting sparse and dense prompt embeddings. The class map is injected at
// the deepest encoder level.
class DiffusionPromptEncoder {
public:
    DiffusionPromptEncoder(int num_classes, int he, int we, uint64_t seed,
                           DiffusionConfig cfg = {});

    Tensor project_class(const std::vector<ClassPrompt>& classes);  // [B,1,He,We]
    Tensor forward_diffuse(const Tensor& f_i, const Tensor& c_expand, int t, Rng& rng) const;
    std::vector<Tensor> encode_features(const Tensor& f_t);  // L = 3 stages
    // gate_override is test-only: replaces the computed attention map
    Tensor dense_branch(const Tensor& f_t, const std::vector<Tensor>& feats,
                        const Tensor& c_p, const Tensor* gate_override = nullptr);
    Tensor sparse_branch(const Tensor& f_t, const std::vector<Tensor>& feats,
                         const Tensor& c_p, const Tensor* gate_override = nullptr);
    PromptEmbeddings encode_prompts(const Tensor& f_i, const std::vector<ClassPrompt>& classes,
                                    Mode mode, Rng& rng);

    std::vector<Parameter*> parameters();
    const DiffusionConfig& config() const { return cfg_; }
    int num_classes() const { return num_classes_; }

private:
    int num_classes_, he_, we_;
    DiffusionConfig cfg_;
    std::vector<Parameter> params_;
    Parameter& p(const char* name);
};

}  // namespace aseg::prompt
